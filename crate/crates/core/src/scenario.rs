//! Seeded synthetic scenes with constructive ground truth for the labelers.
//!
//! Every scene is built in a local frame where the target drives along +x
//! through the origin at `t = 0`, then moved by a random rigid transform and
//! perturbed with isotropic Gaussian noise.
//!
//! Randomness: each scene draws from a ChaCha8 stream seeded with
//! `seed_from_u64(spec.seed)`. Suites derive per-scene seeds as successive
//! SplitMix64 outputs starting from the master seed, so scene `i` of a suite
//! can be regenerated on its own.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::labeler::IntentClass;
use crate::lanes::{Lane, LaneGraph, LaneId};
use crate::pretext::InteractionType;
use crate::trajectory::{
    AgentId, AgentTracks, NormalizationFrame, Scene, TrajKind, Trajectory, FUTURE_LEN, PAST_LEN,
    SAMPLE_DT,
};

const LANE_WIDTH: f64 = 3.5;
const LANE_HALF_LENGTH: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    LeadFollow,
    LeftTurnOncoming,
    StraightWithOncoming,
    Crossing,
    LaneChange,
    NonInteractive,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::LeadFollow,
        ScenarioKind::LeftTurnOncoming,
        ScenarioKind::StraightWithOncoming,
        ScenarioKind::Crossing,
        ScenarioKind::LaneChange,
        ScenarioKind::NonInteractive,
    ];
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub noise_sigma: f64,
    pub n_bystanders: usize,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self { kind, seed, noise_sigma: 0.05, n_bystanders: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec("noise_sigma must be finite and >= 0".into()));
        }
        if self.n_bystanders > 64 {
            return Err(Error::InvalidSpec("at most 64 bystanders".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePair {
    pub other_id: AgentId,
    pub itype: InteractionType,
    /// Constructed arrival samples at the conflict point, when the scenario
    /// has one.
    #[serde(default)]
    pub arrival: Option<(f64, f64)>,
    /// Expected aligned closest-distance class.
    pub closest_class: u8,
    /// Expected direction-of-movement class.
    pub direction_class: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAnnotation {
    pub scene_id: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub target_id: AgentId,
    pub intent: IntentClass,
    /// Pairs the labeler must retain, sorted by other id.
    pub retained_pairs: Vec<OraclePair>,
    /// Oncoming agents within range that the labeler must filter out.
    pub filtered_pairs: Vec<AgentId>,
}

/// SplitMix64 stream used to derive per-scene seeds.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Positions at `t = -19..=30` for one agent in the local frame.
struct Motion {
    id: AgentId,
    path: Vec<Vec2>,
}

fn sample_times() -> impl Iterator<Item = i32> {
    let first = 1 - PAST_LEN as i32;
    first..=FUTURE_LEN as i32
}

fn motion(id: &str, f: impl Fn(f64) -> Vec2) -> Motion {
    Motion { id: AgentId::from(id), path: sample_times().map(|t| f(t as f64 * SAMPLE_DT)).collect() }
}

fn line(p0: Vec2, v: Vec2) -> impl Fn(f64) -> Vec2 {
    move |s| p0 + v * s
}

fn straight_lane(id: &str, y: f64, dir: f64, left: Option<&str>, right: Option<&str>) -> Lane {
    let a = Vec2::new(-LANE_HALF_LENGTH * dir, y);
    let b = Vec2::new(LANE_HALF_LENGTH * dir, y);
    Lane {
        lane_id: id.into(),
        centerline: vec![a, b],
        left_neighbor: left.map(LaneId::from),
        right_neighbor: right.map(LaneId::from),
    }
}

fn base_lanes() -> Vec<Lane> {
    vec![
        straight_lane("ego", 0.0, 1.0, None, Some("right")),
        straight_lane("right", -LANE_WIDTH, 1.0, Some("ego"), None),
        straight_lane("oncoming", LANE_WIDTH, -1.0, None, None),
    ]
}

/// Target and lead vehicle sharing the ego lane; the lead starts 8-14 m
/// ahead and is slightly slower, so the target passes the lead's early
/// positions later in time.
fn lead_pair(rng: &mut ChaCha8Rng) -> (Motion, Motion) {
    let v_t = rng.gen_range(8.0..10.0);
    let v_o = v_t - rng.gen_range(0.5..2.0);
    let gap = rng.gen_range(8.0..14.0);
    (
        motion("target", line(Vec2::ZERO, Vec2::new(v_t, 0.0))),
        motion("car-1", line(Vec2::new(gap, 0.0), Vec2::new(v_o, 0.0))),
    )
}

struct Built {
    motions: Vec<Motion>,
    lanes: Vec<Lane>,
    intent: IntentClass,
    retained: Vec<OraclePair>,
    filtered: Vec<AgentId>,
}

fn build(kind: ScenarioKind, rng: &mut ChaCha8Rng) -> Built {
    let pair = |id: &str, itype, arrival| OraclePair {
        other_id: AgentId::from(id),
        itype,
        arrival,
        closest_class: 0,
        direction_class: 0,
    };
    let lead = |id: &str| pair(id, InteractionType::CloseLead, None);
    match kind {
        ScenarioKind::LeadFollow => {
            let (t, o) = lead_pair(rng);
            Built {
                motions: vec![t, o],
                lanes: base_lanes(),
                intent: IntentClass::Straight,
                retained: vec![lead("car-1")],
                filtered: vec![],
            }
        }
        ScenarioKind::StraightWithOncoming => {
            let (t, o) = lead_pair(rng);
            let v_c = rng.gen_range(8.0..12.0);
            let x0 = rng.gen_range(20.0..40.0);
            let c = motion("car-2", line(Vec2::new(x0, LANE_WIDTH), Vec2::new(-v_c, 0.0)));
            Built {
                motions: vec![t, o, c],
                lanes: base_lanes(),
                intent: IntentClass::Straight,
                retained: vec![lead("car-1")],
                filtered: vec!["car-2".into()],
            }
        }
        ScenarioKind::LeftTurnOncoming => {
            let v = rng.gen_range(6.0..8.0);
            let radius = rng.gen_range(10.0..14.0);
            let target = motion("target", move |s| {
                if s <= 0.0 {
                    return Vec2::new(v * s, 0.0);
                }
                let arc = v * s;
                let phi = arc / radius;
                if phi <= PI / 2.0 {
                    Vec2::new(radius * phi.sin(), radius * (1.0 - phi.cos()))
                } else {
                    Vec2::new(radius, radius + arc - radius * PI / 2.0)
                }
            });
            // Where the turn crosses the oncoming lane, and when (in samples).
            let phi_c = (1.0 - LANE_WIDTH / radius).acos();
            let conflict = Vec2::new(radius * phi_c.sin(), LANE_WIDTH);
            let t1 = radius * phi_c / (v * SAMPLE_DT);
            let other_leads = rng.gen_bool(0.5);
            let gap = rng.gen_range(7.0..9.0);
            let t2: f64 = if other_leads { (t1 - gap).max(1.5) } else { (t1 + gap).min(28.5) };
            let v_o = rng.gen_range(6.0..9.0);
            let oncoming = motion("car-1", move |s| {
                conflict + Vec2::new(-v_o * (s - t2 * SAMPLE_DT), 0.0)
            });
            let mut turn: Vec<Vec2> = (0..=16)
                .map(|k| {
                    let phi = PI / 2.0 * k as f64 / 16.0;
                    Vec2::new(radius * phi.sin(), radius * (1.0 - phi.cos()))
                })
                .collect();
            turn.push(Vec2::new(radius, radius + 60.0));
            let mut lanes = base_lanes();
            lanes.push(Lane { lane_id: "turn".into(), centerline: turn, left_neighbor: None, right_neighbor: None });
            Built {
                motions: vec![target, oncoming],
                lanes,
                intent: IntentClass::LeftTurn,
                retained: vec![pair(
                    "car-1",
                    if t1 > t2 { InteractionType::LeftTurnLead } else { InteractionType::LeftTurnFollow },
                    Some((t1, t2)),
                )],
                filtered: vec![],
            }
        }
        ScenarioKind::Crossing => {
            let v_t = rng.gen_range(8.0..10.0);
            let x_c = rng.gen_range(8.0..18.0);
            let v_o = rng.gen_range(5.0..8.0);
            let t2 = rng.gen_range(13.0..27.0);
            let t1 = x_c / (v_t * SAMPLE_DT);
            let target = motion("target", line(Vec2::ZERO, Vec2::new(v_t, 0.0)));
            let cross = motion("car-1", line(Vec2::new(x_c, -v_o * t2 * SAMPLE_DT), Vec2::new(0.0, v_o)));
            let mut lanes = base_lanes();
            lanes.push(Lane {
                lane_id: "cross".into(),
                centerline: vec![Vec2::new(x_c, -LANE_HALF_LENGTH), Vec2::new(x_c, LANE_HALF_LENGTH)],
                left_neighbor: None,
                right_neighbor: None,
            });
            Built {
                motions: vec![target, cross],
                lanes,
                intent: IntentClass::Straight,
                // Straight target, other outside the target's lane.
                retained: vec![pair("car-1", InteractionType::Weak, Some((t1, t2)))],
                filtered: vec![],
            }
        }
        ScenarioKind::LaneChange => {
            let v_t = rng.gen_range(8.0..10.0);
            let v_o = v_t - rng.gen_range(0.5..1.5);
            let gap = rng.gen_range(10.0..14.0);
            let (t_start, t_end) = (1.0 * SAMPLE_DT, 24.0 * SAMPLE_DT);
            let target = motion("target", move |s| {
                let u = ((s - t_start) / (t_end - t_start)).clamp(0.0, 1.0);
                let smooth = u * u * (3.0 - 2.0 * u);
                Vec2::new(v_t * s, -LANE_WIDTH * smooth)
            });
            let other = motion("car-1", line(Vec2::new(gap, -LANE_WIDTH), Vec2::new(v_o, 0.0)));
            Built {
                motions: vec![target, other],
                lanes: base_lanes(),
                intent: IntentClass::LaneChange,
                retained: vec![lead("car-1")],
                filtered: vec![],
            }
        }
        ScenarioKind::NonInteractive => {
            let v_t = rng.gen_range(6.0..12.0);
            Built {
                motions: vec![motion("target", line(Vec2::ZERO, Vec2::new(v_t, 0.0)))],
                lanes: base_lanes(),
                intent: IntentClass::Straight,
                retained: vec![],
                filtered: vec![],
            }
        }
    }
}

/// Bystanders drive parallel to the ego lanes at least 25 m to the right of
/// them, far from every target path the scenarios construct.
fn bystander(k: usize, rng: &mut ChaCha8Rng) -> Motion {
    let y = rng.gen_range(-45.0..-25.0);
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let speed = rng.gen_range(5.0..12.0);
    let x0 = rng.gen_range(-30.0..30.0);
    motion(&format!("byst-{}", k + 1), line(Vec2::new(x0, y), Vec2::new(dir * speed, 0.0)))
}

const MARGIN: f64 = 0.5;
const MAX_ATTEMPTS: usize = 1000;

fn future(m: &Motion) -> &[Vec2] {
    &m.path[PAST_LEN..]
}

fn cross_time_min(a: &[Vec2], b: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for p in a {
        for q in b {
            best = best.min(p.dist(*q));
        }
    }
    best
}

fn clear_of(value: f64, thresholds: &[f64]) -> bool {
    thresholds.iter().all(|t| (value - t).abs() >= MARGIN)
}

/// Checks the noise-free geometry against every labeling threshold and fills
/// in the expected pretext classes. `false` means the draw must be rejected.
fn settle(built: &mut Built, d_th: f64) -> bool {
    let target = future(&built.motions[0]);
    let by_id = |id: &AgentId| built.motions.iter().find(|m| m.id == *id).map(future);
    for pair in &mut built.retained {
        let Some(other) = by_id(&pair.other_id) else { return false };
        if cross_time_min(target, other) > d_th - MARGIN {
            return false;
        }
        let aligned: Vec<f64> = target.iter().zip(other).map(|(p, q)| p.dist(*q)).collect();
        let closest = aligned.iter().copied().fold(f64::INFINITY, f64::min);
        let dir = aligned[aligned.len() - 1] - aligned[0];
        if !clear_of(closest, &[5.0, 10.0, 15.0]) || !clear_of(dir, &[-2.0, 2.0]) {
            return false;
        }
        pair.closest_class = [5.0, 10.0, 15.0].iter().filter(|&&t| closest > t).count() as u8;
        pair.direction_class = if dir >= 2.0 {
            0
        } else if dir <= -2.0 {
            1
        } else {
            2
        };
    }
    for id in &built.filtered {
        match by_id(id) {
            Some(other) if cross_time_min(target, other) <= d_th - MARGIN => {}
            _ => return false,
        }
    }
    let interacting: Vec<&AgentId> =
        built.retained.iter().map(|p| &p.other_id).chain(&built.filtered).collect();
    built.motions[1..]
        .iter()
        .filter(|m| !interacting.contains(&&m.id))
        .all(|m| cross_time_min(target, future(m)) > 2.0 * d_th)
}

pub fn generate(spec: &ScenarioSpec) -> Result<(Scene, OracleAnnotation)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d_th = crate::labeler::LabelConfig::default().d_th;
    let mut attempt = 0;
    let mut built = loop {
        let mut built = build(spec.kind, &mut rng);
        for k in 0..spec.n_bystanders {
            built.motions.push(bystander(k, &mut rng));
        }
        if settle(&mut built, d_th) {
            break built;
        }
        attempt += 1;
        if attempt == MAX_ATTEMPTS {
            return Err(Error::InvalidSpec(format!("no admissible {} layout", spec.kind)));
        }
    };

    let placement = NormalizationFrame {
        origin: Vec2::new(rng.gen_range(-1000.0..1000.0), rng.gen_range(-1000.0..1000.0)),
        rotation: rng.gen_range(-PI..PI),
        degenerate_heading: false,
    };
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma))
        .transpose()
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let past_start = 1 - PAST_LEN as i32;
    let mut agents = Vec::with_capacity(built.motions.len());
    for m in &built.motions {
        let world: Vec<Vec2> = m
            .path
            .iter()
            .map(|&p| {
                let q = placement.to_world(p);
                match &noise {
                    Some(n) => q + Vec2::new(n.sample(&mut rng), n.sample(&mut rng)),
                    None => q,
                }
            })
            .collect();
        let (past, future) = world.split_at(PAST_LEN);
        agents.push(AgentTracks::new(
            Trajectory::new(m.id.clone(), TrajKind::Past, past_start, past)?,
            Trajectory::new(m.id.clone(), TrajKind::Future, 1, future)?,
        )?);
    }
    let mut lanes = LaneGraph::new(built.lanes)?;
    lanes.map_positions(|p| placement.to_world(p));

    let scene_id = format!("{}-{:016x}", spec.kind, spec.seed);
    let scene = Scene::new(scene_id.clone(), "target".into(), agents, lanes)?;
    built.retained.sort_by(|a, b| a.other_id.cmp(&b.other_id));
    built.filtered.sort();
    let oracle = OracleAnnotation {
        scene_id,
        kind: spec.kind,
        seed: spec.seed,
        target_id: "target".into(),
        intent: built.intent,
        retained_pairs: built.retained,
        filtered_pairs: built.filtered,
    };
    Ok((scene, oracle))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n: usize,
    pub master_seed: u64,
    pub noise_sigma: f64,
    pub n_bystanders: usize,
}

impl SuiteConfig {
    pub fn new(n: usize, master_seed: u64) -> Self {
        Self { n, master_seed, noise_sigma: 0.05, n_bystanders: 2 }
    }

    /// Spec of scene `i`: kinds cycle in [`ScenarioKind::ALL`] order.
    pub fn specs(&self) -> Vec<ScenarioSpec> {
        let mut seeds = SplitMix64::new(self.master_seed);
        (0..self.n)
            .map(|i| ScenarioSpec {
                kind: ScenarioKind::ALL[i % ScenarioKind::ALL.len()],
                seed: seeds.next_u64(),
                noise_sigma: self.noise_sigma,
                n_bystanders: self.n_bystanders,
            })
            .collect()
    }
}

/// Expected count of each kind in a suite of `n` scenes.
pub fn stratified_counts(n: usize) -> BTreeMap<ScenarioKind, usize> {
    let k = ScenarioKind::ALL.len();
    ScenarioKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &kind)| (kind, n / k + usize::from(i < n % k)))
        .collect()
}

/// Scenes are named `scene-{index:06}`, so file order equals suite order.
pub fn generate_suite(cfg: &SuiteConfig) -> Result<Vec<(Scene, OracleAnnotation)>> {
    if cfg.n == 0 {
        return Err(Error::InvalidSpec("suite needs at least one scene".into()));
    }
    cfg.specs()
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let (mut scene, mut oracle) = generate(spec)?;
            let id = format!("scene-{i:06}");
            scene.scene_id.clone_from(&id);
            oracle.scene_id = id;
            Ok((scene, oracle))
        })
        .collect()
}
