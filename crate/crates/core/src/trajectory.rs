//! Trajectory and scene data model, displacement preprocessing and
//! scene-centric normalization.
//!
//! Sample indices are anchored at the present: the last past sample is
//! `t_index == 0`, past samples run `-19..=0` and future samples `1..=30`
//! at 10 Hz.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::lanes::LaneGraph;

pub const SAMPLE_HZ: f64 = 10.0;
pub const SAMPLE_DT: f64 = 1.0 / SAMPLE_HZ;
/// Observed history length `T_p` (2 s).
pub const PAST_LEN: usize = 20;
/// Forecast horizon `T_c` (3 s).
pub const FUTURE_LEN: usize = 30;
/// Displacements shorter than this carry no usable heading.
pub const MIN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    pub x: f64,
    pub y: f64,
    pub t_index: i32,
}

impl TrajPoint {
    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajKind {
    Past,
    Future,
}

/// Contiguous, finite, 10 Hz track of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    agent_id: AgentId,
    kind: TrajKind,
    points: Vec<TrajPoint>,
}

impl Trajectory {
    /// Builds a trajectory whose first sample has index `start`.
    pub fn new(agent_id: AgentId, kind: TrajKind, start: i32, xy: &[Vec2]) -> Result<Self> {
        let points = xy
            .iter()
            .enumerate()
            .map(|(k, p)| TrajPoint { x: p.x, y: p.y, t_index: start + k as i32 })
            .collect();
        Self::from_points(agent_id, kind, points)
    }

    pub fn from_points(agent_id: AgentId, kind: TrajKind, points: Vec<TrajPoint>) -> Result<Self> {
        for (k, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::NonFinite { index: k });
            }
            if k > 0 && p.t_index != points[k - 1].t_index + 1 {
                return Err(Error::NonContiguous { position: k });
            }
        }
        Ok(Self { agent_id, kind, points })
    }

    pub fn empty(agent_id: AgentId, kind: TrajKind) -> Self {
        Self { agent_id, kind, points: Vec::new() }
    }

    pub fn agent_id(&self) -> &AgentId {
        &self.agent_id
    }

    pub fn kind(&self) -> TrajKind {
        self.kind
    }

    pub fn points(&self) -> &[TrajPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = Vec2> + '_ {
        self.points.iter().map(TrajPoint::pos)
    }

    pub fn first_index(&self) -> Option<i32> {
        self.points.first().map(|p| p.t_index)
    }

    pub fn last_index(&self) -> Option<i32> {
        self.points.last().map(|p| p.t_index)
    }

    /// Position of the sample with the given index, if present.
    pub fn at(&self, t_index: i32) -> Option<Vec2> {
        let first = self.first_index()?;
        let k = t_index.checked_sub(first)?;
        if k < 0 {
            return None;
        }
        self.points.get(k as usize).map(TrajPoint::pos)
    }

    /// Checks the length bound for this trajectory's kind.
    pub fn check_horizon(&self, past_len: usize, future_len: usize) -> Result<()> {
        let max = match self.kind {
            TrajKind::Past => past_len,
            TrajKind::Future => future_len,
        };
        if self.len() > max {
            return Err(Error::LengthMismatch { expected: max, got: self.len() });
        }
        Ok(())
    }

    pub(crate) fn map_positions(&mut self, f: impl Fn(Vec2) -> Vec2) {
        for p in &mut self.points {
            let q = f(p.pos());
            p.x = q.x;
            p.y = q.y;
        }
    }
}

/// Step-to-step displacements of a trajectory plus the anchor needed to
/// reconstruct it.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSeq {
    pub origin: Vec2,
    pub start: i32,
    pub deltas: Vec<Vec2>,
}

impl DisplacementSeq {
    /// Rebuilds absolute positions by cumulative summation from the origin.
    pub fn integrate(&self) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.deltas.len() + 1);
        let mut p = self.origin;
        out.push(p);
        for d in &self.deltas {
            p = p + *d;
            out.push(p);
        }
        out
    }
}

pub fn to_displacements(traj: &Trajectory) -> Result<DisplacementSeq> {
    let pts = traj.points();
    if pts.len() < 2 {
        return Err(Error::TrajectoryTooShort { needed: 2, got: pts.len() });
    }
    Ok(DisplacementSeq {
        origin: pts[0].pos(),
        start: pts[0].t_index,
        deltas: pts.windows(2).map(|w| w[1].pos() - w[0].pos()).collect(),
    })
}

/// Heading of the step arriving at `t_index`; when that step is shorter than
/// [`MIN_STEP`], the most recent longer step before it is used.
pub fn heading_at(traj: &Trajectory, t_index: i32) -> Result<f64> {
    heading_in(traj.points(), t_index)
}

pub(crate) fn heading_in(points: &[TrajPoint], t_index: i32) -> Result<f64> {
    let first = points.first().ok_or(Error::EmptyTrajectory)?.t_index;
    let k = i64::from(t_index) - i64::from(first);
    if k < 1 || k >= points.len() as i64 {
        return Err(Error::IndexOutOfRange { t_index });
    }
    (1..=k as usize)
        .rev()
        .map(|j| points[j].pos() - points[j - 1].pos())
        .find(|d| d.norm() >= MIN_STEP)
        .map(Vec2::angle)
        .ok_or(Error::AllStationary)
}

/// Past and future of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTracks {
    pub past: Trajectory,
    pub future: Trajectory,
}

impl AgentTracks {
    pub fn new(past: Trajectory, future: Trajectory) -> Result<Self> {
        if past.agent_id() != future.agent_id() {
            return Err(Error::InvalidSpec(format!(
                "past/future agent ids differ: {} vs {}",
                past.agent_id(),
                future.agent_id()
            )));
        }
        Ok(Self { past, future })
    }

    pub fn agent_id(&self) -> &AgentId {
        self.past.agent_id()
    }

    /// Past followed by future. Gaps between the two are kept as-is, so the
    /// result is only index-contiguous when the tracks abut.
    pub fn combined_points(&self) -> Vec<TrajPoint> {
        let mut v = self.past.points().to_vec();
        v.extend_from_slice(self.future.points());
        v
    }

    /// Contiguous run of samples around the present, preferring the full
    /// past+future track when the two abut.
    fn contiguous_points(&self) -> Vec<TrajPoint> {
        match (self.past.last_index(), self.future.first_index()) {
            (Some(a), Some(b)) if b == a + 1 => self.combined_points(),
            (Some(_), _) => self.past.points().to_vec(),
            _ => self.future.points().to_vec(),
        }
    }

    /// Position at `t_index == 0`, or at the sample nearest to it.
    pub fn present_position(&self) -> Option<Vec2> {
        self.combined_points()
            .iter()
            .min_by_key(|p| p.t_index.unsigned_abs())
            .map(TrajPoint::pos)
    }

    /// Heading at the present (`t_index == 0`) using [`heading_at`] semantics.
    /// Agents without a sample at 0 use the step arriving at the sample
    /// nearest to it.
    pub fn present_heading(&self) -> Result<f64> {
        let pts = self.contiguous_points();
        if pts.len() < 2 {
            return Err(Error::TrajectoryTooShort { needed: 2, got: pts.len() });
        }
        let first = pts[0].t_index;
        let last = pts[pts.len() - 1].t_index;
        let t = 0.clamp(first + 1, last);
        heading_in(&pts, t)
    }

    pub(crate) fn map_positions(&mut self, f: impl Fn(Vec2) -> Vec2 + Copy) {
        self.past.map_positions(f);
        self.future.map_positions(f);
    }
}

/// Rigid transform from the source coordinates into the scene-centric frame:
/// `local = R(-rotation) * (world - origin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFrame {
    pub origin: Vec2,
    pub rotation: f64,
    /// Set when the target did not move over its last step and only the
    /// translation was applied.
    #[serde(default)]
    pub degenerate_heading: bool,
}

impl Default for NormalizationFrame {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl NormalizationFrame {
    pub const IDENTITY: NormalizationFrame =
        NormalizationFrame { origin: Vec2::ZERO, rotation: 0.0, degenerate_heading: false };

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(-self.rotation)
    }

    pub fn to_world(&self, q: Vec2) -> Vec2 {
        q.rotate(self.rotation) + self.origin
    }

    /// The frame equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &NormalizationFrame) -> NormalizationFrame {
        NormalizationFrame {
            origin: self.origin + next.origin.rotate(self.rotation),
            rotation: crate::geom::wrap_angle(self.rotation + next.rotation),
            degenerate_heading: next.degenerate_heading,
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.origin.norm() <= tol && crate::geom::wrap_angle(self.rotation).abs() <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub target_id: AgentId,
    pub agents: BTreeMap<AgentId, AgentTracks>,
    pub lanes: LaneGraph,
    /// Cumulative transform from the source coordinates to the current ones.
    pub frame: NormalizationFrame,
}

impl Scene {
    pub fn new(
        scene_id: impl Into<String>,
        target_id: AgentId,
        agents: impl IntoIterator<Item = AgentTracks>,
        lanes: LaneGraph,
    ) -> Result<Self> {
        let agents: BTreeMap<_, _> =
            agents.into_iter().map(|a| (a.agent_id().clone(), a)).collect();
        if !agents.contains_key(&target_id) {
            return Err(Error::UnknownAgent(target_id.0));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            target_id,
            agents,
            lanes,
            frame: NormalizationFrame::IDENTITY,
        })
    }

    pub fn target(&self) -> &AgentTracks {
        // Constructors and deserialization both check target membership.
        &self.agents[&self.target_id]
    }

    pub fn agent(&self, id: &AgentId) -> Result<&AgentTracks> {
        self.agents.get(id).ok_or_else(|| Error::UnknownAgent(id.0.clone()))
    }

    /// Applies a rigid transform to every trajectory and lane and records it.
    pub fn apply_frame(&mut self, frame: &NormalizationFrame) {
        let f = |p: Vec2| frame.to_local(p);
        for tracks in self.agents.values_mut() {
            tracks.map_positions(f);
        }
        self.lanes.map_positions(f);
        self.frame = self.frame.then(frame);
    }

    /// Undoes the cumulative frame, returning the scene in source coordinates.
    pub fn denormalized(&self) -> Scene {
        let frame = self.frame;
        let mut out = self.clone();
        let f = |q: Vec2| frame.to_world(q);
        for tracks in out.agents.values_mut() {
            tracks.map_positions(f);
        }
        out.lanes.map_positions(f);
        out.frame = NormalizationFrame::IDENTITY;
        out
    }
}

/// Frame placing the target's last observed position at the origin with its
/// last observed step along +x. Falls back to translation only when that step
/// is degenerate.
pub fn normalization_frame(scene: &Scene) -> Result<NormalizationFrame> {
    let past = scene.target().past.points();
    if past.len() < 2 {
        return Err(Error::TrajectoryTooShort { needed: 2, got: past.len() });
    }
    let cur = past[past.len() - 1].pos();
    let prev = past[past.len() - 2].pos();
    let step = cur - prev;
    let (rotation, degenerate_heading) =
        if step.norm() > MIN_STEP { (step.angle(), false) } else { (0.0, true) };
    Ok(NormalizationFrame { origin: cur, rotation, degenerate_heading })
}

pub fn normalize_scene(scene: &Scene) -> Result<Scene> {
    let frame = normalization_frame(scene)?;
    let mut out = scene.clone();
    out.apply_frame(&frame);
    Ok(out)
}
