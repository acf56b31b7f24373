//! Lane centerlines with same-direction neighbor links.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec2};

/// An agent is "in" a lane when its position lies within this distance of
/// the lane centerline.
pub const LANE_MEMBERSHIP_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub String);

impl From<&str> for LaneId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub lane_id: LaneId,
    pub centerline: Vec<Vec2>,
    #[serde(default)]
    pub left_neighbor: Option<LaneId>,
    #[serde(default)]
    pub right_neighbor: Option<LaneId>,
}

impl Lane {
    /// Unit heading of each centerline segment (zero for repeated points).
    pub fn segment_directions(&self) -> Vec<Vec2> {
        self.centerline
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                let n = d.norm();
                if n > 0.0 {
                    d * (1.0 / n)
                } else {
                    Vec2::ZERO
                }
            })
            .collect()
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.centerline
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed perpendicular offset of `p` from the line through the nearest
    /// centerline segment; positive to the left of travel.
    pub fn lateral_offset(&self, p: Vec2) -> f64 {
        let (mut best, mut best_d) = (0usize, f64::INFINITY);
        for (k, w) in self.centerline.windows(2).enumerate() {
            let d = point_segment_distance(p, w[0], w[1]);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        let a = self.centerline[best];
        let dir = self.centerline[best + 1] - a;
        let n = dir.norm();
        if n == 0.0 {
            return best_d;
        }
        dir.cross(p - a) / n
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "LaneGraphRepr", into = "LaneGraphRepr")]
pub struct LaneGraph {
    lanes: BTreeMap<LaneId, Lane>,
}

#[derive(Serialize, Deserialize)]
struct LaneGraphRepr {
    lanes: Vec<Lane>,
}

impl TryFrom<LaneGraphRepr> for LaneGraph {
    type Error = Error;
    fn try_from(r: LaneGraphRepr) -> Result<Self> {
        LaneGraph::new(r.lanes)
    }
}

impl From<LaneGraph> for LaneGraphRepr {
    fn from(g: LaneGraph) -> Self {
        LaneGraphRepr { lanes: g.lanes.into_values().collect() }
    }
}

impl LaneGraph {
    pub fn new(lanes: impl IntoIterator<Item = Lane>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for lane in lanes {
            if lane.centerline.len() < 2 {
                return Err(Error::InvalidLaneGraph(format!(
                    "lane {} has fewer than 2 centerline points",
                    lane.lane_id.0
                )));
            }
            if lane.centerline.iter().any(|p| !p.is_finite()) {
                return Err(Error::InvalidLaneGraph(format!(
                    "lane {} has a non-finite point",
                    lane.lane_id.0
                )));
            }
            if map.insert(lane.lane_id.clone(), lane).is_some() {
                return Err(Error::InvalidLaneGraph("duplicate lane id".into()));
            }
        }
        for lane in map.values() {
            for n in [&lane.left_neighbor, &lane.right_neighbor].into_iter().flatten() {
                if !map.contains_key(n) {
                    return Err(Error::InvalidLaneGraph(format!(
                        "lane {} references unknown neighbor {}",
                        lane.lane_id.0, n.0
                    )));
                }
            }
        }
        Ok(Self { lanes: map })
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn get(&self, id: &LaneId) -> Option<&Lane> {
        self.lanes.get(id)
    }

    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.values()
    }

    /// Closest lane whose centerline lies within `radius` of `p`; ties go to
    /// the lowest lane id.
    pub fn nearest_lane(&self, p: Vec2, radius: f64) -> Option<&Lane> {
        let mut best: Option<(&Lane, f64)> = None;
        for lane in self.lanes.values() {
            let d = lane.distance_to(p);
            if d <= radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((lane, d));
            }
        }
        best.map(|(l, _)| l)
    }

    /// Whether `p` lies within `radius` of lane `id`'s centerline.
    pub fn contains(&self, id: &LaneId, p: Vec2, radius: f64) -> bool {
        self.lanes.get(id).is_some_and(|l| l.distance_to(p) <= radius)
    }

    pub(crate) fn map_positions(&mut self, f: impl Fn(Vec2) -> Vec2) {
        for lane in self.lanes.values_mut() {
            for p in &mut lane.centerline {
                *p = f(*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(id: &str, y: f64, right: Option<&str>) -> Lane {
        Lane {
            lane_id: id.into(),
            centerline: vec![Vec2::new(-50.0, y), Vec2::new(50.0, y)],
            left_neighbor: None,
            right_neighbor: right.map(LaneId::from),
        }
    }

    #[test]
    fn neighbor_references_must_resolve() {
        let err = LaneGraph::new([straight("a", 0.0, Some("zz"))]).unwrap_err();
        assert!(matches!(err, Error::InvalidLaneGraph(_)));
    }

    #[test]
    fn nearest_lane_and_membership() {
        let g = LaneGraph::new([straight("a", 0.0, Some("b")), straight("b", -3.5, None)]).unwrap();
        assert_eq!(g.nearest_lane(Vec2::new(3.0, -0.4), 2.0).unwrap().lane_id, "a".into());
        assert_eq!(g.nearest_lane(Vec2::new(3.0, -3.0), 2.0).unwrap().lane_id, "b".into());
        assert!(g.nearest_lane(Vec2::new(3.0, 9.0), 2.0).is_none());
        assert!(g.contains(&"b".into(), Vec2::new(0.0, -2.0), 2.0));
        assert!(!g.contains(&"b".into(), Vec2::new(0.0, 0.0), 2.0));
    }

    #[test]
    fn lateral_offset_is_signed() {
        let l = straight("a", 0.0, None);
        assert_eq!(l.lateral_offset(Vec2::new(10.0, 1.5)), 1.5);
        assert_eq!(l.lateral_offset(Vec2::new(10.0, -3.5)), -3.5);
        assert_eq!(l.segment_directions(), vec![Vec2::new(1.0, 0.0)]);
    }

    #[test]
    fn json_round_trip() {
        let g = LaneGraph::new([straight("a", 0.0, Some("b")), straight("b", -3.5, None)]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<LaneGraph>(&s).unwrap(), g);
    }
}
