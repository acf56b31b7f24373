use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::labeler::SceneLabels;
use crate::lanes::{Lane, LaneGraph};
use crate::loss::{PairPretextPrediction, SceneLossReport};
use crate::metrics::{MetricsReport, PredictionSet};
use crate::pretext::ScenePretext;
use crate::scenario::OracleAnnotation;
use crate::trajectory::{AgentId, AgentTracks, NormalizationFrame, Scene, TrajKind, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

/// Longest accepted record line, in bytes.
pub const MAX_LINE_BYTES: usize = 64 << 20;

/// A value stored one-per-line in a record file.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Files are written sorted by this key.
    fn sort_key(&self) -> String;
}

#[derive(Serialize, Deserialize)]
struct TrackRepr {
    start: i32,
    xy: Vec<Vec2>,
}

#[derive(Serialize, Deserialize)]
struct AgentRepr {
    agent_id: AgentId,
    past: TrackRepr,
    future: TrackRepr,
}

#[derive(Serialize, Deserialize)]
struct SceneRepr {
    scene_id: String,
    target_id: AgentId,
    frame: NormalizationFrame,
    lanes: LaneGraph,
    agents: Vec<AgentRepr>,
}

fn track_repr(t: &Trajectory) -> TrackRepr {
    TrackRepr { start: t.first_index().unwrap_or(0), xy: t.positions().collect() }
}

impl Serialize for Scene {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SceneRepr {
            scene_id: self.scene_id.clone(),
            target_id: self.target_id.clone(),
            frame: self.frame,
            lanes: self.lanes.clone(),
            agents: self
                .agents
                .iter()
                .map(|(id, a)| AgentRepr {
                    agent_id: id.clone(),
                    past: track_repr(&a.past),
                    future: track_repr(&a.future),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scene {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = SceneRepr::deserialize(d)?;
        let mut agents = Vec::with_capacity(repr.agents.len());
        for a in repr.agents {
            let past = Trajectory::new(a.agent_id.clone(), TrajKind::Past, a.past.start, &a.past.xy)
                .map_err(D::Error::custom)?;
            let future = Trajectory::new(a.agent_id, TrajKind::Future, a.future.start, &a.future.xy)
                .map_err(D::Error::custom)?;
            agents.push(AgentTracks::new(past, future).map_err(D::Error::custom)?);
        }
        let n = agents.len();
        let mut scene =
            Scene::new(repr.scene_id, repr.target_id, agents, repr.lanes).map_err(D::Error::custom)?;
        if scene.agents.len() != n {
            return Err(D::Error::custom("duplicate agent id"));
        }
        scene.frame = repr.frame;
        Ok(scene)
    }
}

/// Model outputs for one scene: K modes per agent and, optionally, pretext
/// head outputs per interacting pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePredictions {
    pub scene_id: String,
    pub agents: Vec<PredictionSet>,
    #[serde(default)]
    pub pretext: Vec<PairPretextPrediction>,
}

/// A row or scene dropped during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub source: String,
    #[serde(default)]
    pub line: Option<u64>,
    pub kind: String,
    pub reason: String,
}

impl Record for Scene {
    const KIND: &'static str = "scene";
    fn sort_key(&self) -> String {
        self.scene_id.clone()
    }
}

impl Record for SceneLabels {
    const KIND: &'static str = "labels";
    fn sort_key(&self) -> String {
        self.scene_id.clone()
    }
}

impl Record for ScenePretext {
    const KIND: &'static str = "pretext";
    fn sort_key(&self) -> String {
        self.scene_id.clone()
    }
}

impl Record for ScenePredictions {
    const KIND: &'static str = "predictions";
    fn sort_key(&self) -> String {
        self.scene_id.clone()
    }
}

impl Record for OracleAnnotation {
    const KIND: &'static str = "oracle";
    fn sort_key(&self) -> String {
        self.scene_id.clone()
    }
}

impl Record for SceneLossReport {
    const KIND: &'static str = "losses";
    fn sort_key(&self) -> String {
        self.scene_id.clone()
    }
}

impl Record for MetricsReport {
    const KIND: &'static str = "report";
    fn sort_key(&self) -> String {
        String::new()
    }
}

impl Record for RejectRecord {
    const KIND: &'static str = "reject";
    fn sort_key(&self) -> String {
        format!("{}\u{0}{:020}", self.source, self.line.unwrap_or(0))
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u32,
    record: &'static str,
    data: &'a T,
}

#[derive(Deserialize)]
struct Probe {
    schema_version: Option<serde_json::Value>,
    record: Option<String>,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    data: T,
}

pub fn to_line<T: Record>(item: &T) -> Result<String> {
    let env = EnvelopeOut { schema_version: SCHEMA_VERSION, record: T::KIND, data: item };
    serde_json::to_string(&env).map_err(|e| Error::MalformedRecord { line: 0, reason: e.to_string() })
}

fn check_version(v: Option<&serde_json::Value>, line: usize) -> Result<()> {
    match v {
        Some(v) => match v.as_u64() {
            Some(found) if found == u64::from(SCHEMA_VERSION) => Ok(()),
            Some(found) => Err(Error::SchemaVersionMismatch { expected: SCHEMA_VERSION, found }),
            None => Err(Error::MalformedRecord { line, reason: "schema_version is not an integer".into() }),
        },
        None => Err(Error::MalformedRecord { line, reason: "missing schema_version".into() }),
    }
}

/// Parses one line; `line` is only used for error reporting.
pub fn from_line<T: Record>(text: &str, line: usize) -> Result<T> {
    let malformed = |e: serde_json::Error| Error::MalformedRecord { line, reason: e.to_string() };
    let probe: Probe = serde_json::from_str(text).map_err(malformed)?;
    check_version(probe.schema_version.as_ref(), line)?;
    match probe.record.as_deref() {
        Some(kind) if kind == T::KIND => {}
        other => {
            return Err(Error::MalformedRecord {
                line,
                reason: format!("expected record '{}', found {:?}", T::KIND, other),
            })
        }
    }
    let env: EnvelopeIn<T> = serde_json::from_str(text).map_err(malformed)?;
    Ok(env.data)
}

pub fn write_records_to<T: Record, W: Write>(mut w: W, items: &[T]) -> Result<()> {
    let mut sorted: Vec<&T> = items.iter().collect();
    sorted.sort_by_cached_key(|t| t.sort_key());
    for item in sorted {
        w.write_all(to_line(item)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records<T: Record>(path: &Path, items: &[T]) -> Result<()> {
    write_records_to(BufWriter::new(File::create(path)?), items)
}

pub fn read_records_from<T: Record, R: Read>(r: R) -> Result<Vec<T>> {
    let mut reader = BufReader::new(r);
    let mut buf = Vec::new();
    let mut out = Vec::new();
    let mut line = 0;
    loop {
        buf.clear();
        let n = (&mut reader).take(MAX_LINE_BYTES as u64 + 1).read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line += 1;
        if buf.len() > MAX_LINE_BYTES {
            return Err(Error::MalformedRecord { line, reason: "line too long".into() });
        }
        let text = std::str::from_utf8(&buf)
            .map_err(|e| Error::MalformedRecord { line, reason: e.to_string() })?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        out.push(from_line(text, line)?);
    }
    Ok(out)
}

pub fn read_records<T: Record>(path: &Path) -> Result<Vec<T>> {
    read_records_from(File::open(path)?)
}

#[derive(Serialize, Deserialize)]
struct LaneFile {
    schema_version: serde_json::Value,
    lanes: Vec<Lane>,
}

pub fn lane_graph_to_string(graph: &LaneGraph) -> Result<String> {
    let file = LaneFile { schema_version: SCHEMA_VERSION.into(), lanes: graph.lanes().cloned().collect() };
    serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidLaneGraph(e.to_string()))
}

pub fn lane_graph_from_str(text: &str) -> Result<LaneGraph> {
    let probe: Probe =
        serde_json::from_str(text).map_err(|e| Error::InvalidLaneGraph(e.to_string()))?;
    check_version(probe.schema_version.as_ref(), 1)?;
    let file: LaneFile =
        serde_json::from_str(text).map_err(|e| Error::InvalidLaneGraph(e.to_string()))?;
    LaneGraph::new(file.lanes)
}

pub fn write_lane_graph(path: &Path, graph: &LaneGraph) -> Result<()> {
    std::fs::write(path, lane_graph_to_string(graph)? + "\n")?;
    Ok(())
}

pub fn read_lane_graph(path: &Path) -> Result<LaneGraph> {
    lane_graph_from_str(&std::fs::read_to_string(path)?)
}
